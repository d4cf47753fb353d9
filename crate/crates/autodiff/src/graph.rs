use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use crate::error::{AutodiffError, Result};
use crate::kernels::{self, ConvDims};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// Wraps an angle to `(-π, π]`. Values already in range are returned unchanged.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        a
    } else {
        PI - (PI - a).rem_euclid(TAU)
    }
}

/// A user-defined primitive.
///
/// `backward` must accumulate (`+=`) the adjoint for input `index` into
/// `target`. `symbolic_backward` is optional; without it the op cannot sit
/// inside a [`Graph::grad_nodes`] region.
pub trait CustomOp: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn output_shape(&self, inputs: &[&[usize]]) -> Vec<usize>;
    fn forward(&self, inputs: &[&[f64]]) -> Vec<f64>;
    fn backward(
        &self,
        index: usize,
        inputs: &[&[f64]],
        output: &[f64],
        grad: &[f64],
        target: &mut [f64],
    );
    fn symbolic_backward(
        &self,
        _graph: &mut Graph,
        _index: usize,
        _inputs: &[NodeId],
        _output: NodeId,
        _grad: NodeId,
    ) -> Result<Option<NodeId>> {
        Err(AutodiffError::NoSymbolicAdjoint {
            op: self.name().to_string(),
        })
    }
    /// Appends a fingerprint of any branch decisions taken for these inputs.
    fn nonsmooth_state(&self, _inputs: &[&[f64]], _out: &mut Vec<u64>) {}
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Placeholder(String),
    Param { id: ParamId, name: String },
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Atan2,
    Neg,
    Scale(f64),
    Offset(f64),
    MulConst(Arc<[f64]>),
    Sin,
    Cos,
    Tanh,
    Exp,
    Sqrt,
    Square,
    Relu,
    Sigmoid,
    Step,
    MaxConst(f64),
    MinConst(f64),
    WrapAngle,
    MatMul,
    Conv2d { stride: usize },
    MaxPool2d { size: usize },
    Concat,
    Slice { start: usize, len: usize },
    PadSlice { start: usize, total: usize },
    Reshape,
    Sum,
    Broadcast,
    L2Norm,
    CumSum,
    RevCumSum,
    Custom(Arc<dyn CustomOp>),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Placeholder(_) => "placeholder",
            Op::Param { .. } => "param",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Atan2 => "atan2",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::MulConst(_) => "mul_const",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Sqrt => "sqrt",
            Op::Square => "square",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Step => "step",
            Op::MaxConst(_) => "max_const",
            Op::MinConst(_) => "min_const",
            Op::WrapAngle => "wrap_angle",
            Op::MatMul => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::Concat => "concat",
            Op::Slice { .. } => "slice",
            Op::PadSlice { .. } => "pad_slice",
            Op::Reshape => "reshape",
            Op::Sum => "sum",
            Op::Broadcast => "broadcast",
            Op::L2Norm => "l2_norm",
            Op::CumSum => "cumsum",
            Op::RevCumSum => "rev_cumsum",
            Op::Custom(op) => op.name(),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<NodeId>,
    pub(crate) shape: Vec<usize>,
}

/// Values for placeholder leaves, keyed by node.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    values: HashMap<NodeId, Tensor>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, node: NodeId, value: Tensor) -> &mut Self {
        self.values.insert(node, value);
        self
    }

    pub fn get(&self, node: NodeId) -> Option<&Tensor> {
        self.values.get(&node)
    }
}

/// Gradients of a scalar output with respect to the leaves of a graph.
#[derive(Clone, Debug)]
pub struct Gradients {
    leaves: HashMap<NodeId, Tensor>,
    shapes: HashMap<NodeId, Vec<usize>>,
    params: Vec<(NodeId, ParamId)>,
}

impl Gradients {
    /// Gradient for a leaf; zero when the leaf is not on any path to the output.
    pub fn wrt(&self, leaf: NodeId) -> Tensor {
        match self.leaves.get(&leaf) {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.shapes.get(&leaf).map(Vec::as_slice).unwrap_or(&[1])),
        }
    }

    /// Adds every parameter gradient into `store`'s gradient buffer.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, id) in &self.params {
            if let Some(t) = self.leaves.get(&node) {
                for (a, b) in store.grad_mut(id).iter_mut().zip(t.data()) {
                    *a += b;
                }
            }
        }
    }
}

/// A dynamic computation graph. See the crate documentation.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    values: Vec<Option<Tensor>>,
    argmax: HashMap<usize, Vec<usize>>,
}

fn same_or_scalar(a: &[usize], b: &[usize], op: &str) -> Vec<usize> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b || nb == 1 {
        a.to_vec()
    } else if na == 1 {
        b.to_vec()
    } else {
        panic!("{op}: incompatible shapes {a:?} and {b:?}");
    }
}

#[inline]
fn at(a: &[f64], k: usize) -> f64 {
    if a.len() == 1 {
        a[0]
    } else {
        a[k]
    }
}

fn binary(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n).map(|k| f(at(a, k), at(b, k))).collect()
}

/// Accumulates an element-wise contribution, reducing onto a broadcast scalar.
#[inline]
fn acc(target: &mut [f64], n: usize, contrib: impl Fn(usize) -> f64) {
    if target.len() == n {
        for (k, t) in target.iter_mut().enumerate() {
            *t += contrib(k);
        }
    } else {
        target[0] += (0..n).map(contrib).sum::<f64>();
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

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: NodeId) -> usize {
        self.nodes[id.0].shape.iter().product()
    }

    /// Cached forward value, if the node has been evaluated.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values[id.0].as_ref()
    }

    pub(crate) fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, shape });
        self.values.push(None);
        id
    }

    fn unary(&mut self, op: Op, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(op, vec![a], shape)
    }

    fn binary_op(&mut self, op: Op, a: NodeId, b: NodeId) -> NodeId {
        let shape = same_or_scalar(self.shape(a), self.shape(b), op.name());
        self.push(op, vec![a, b], shape)
    }

    // ---- leaves ----

    pub fn placeholder(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(Op::Placeholder(name.to_string()), vec![], shape.to_vec())
    }

    /// A parameter leaf. Its value is read from the store passed to `forward`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let spec = store.spec(id);
        self.push(
            Op::Param {
                id,
                name: spec.name.clone(),
            },
            vec![],
            spec.shape.clone(),
        )
    }

    /// A non-differentiable leaf with a fixed value.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let id = self.push(Op::Constant, vec![], value.shape().to_vec());
        self.values[id.0] = Some(value);
        id
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    pub fn vector(&mut self, data: Vec<f64>) -> NodeId {
        self.constant(Tensor::vector(data))
    }

    // ---- element-wise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_op(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_op(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_op(Op::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_op(Op::Div, a, b)
    }

    /// Element-wise `atan2(y, x)`.
    pub fn atan2(&mut self, y: NodeId, x: NodeId) -> NodeId {
        self.binary_op(Op::Atan2, y, x)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Neg, a)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::Scale(c), a)
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::Offset(c), a)
    }

    /// Element-wise product with a constant vector of the same length.
    pub fn mul_const(&mut self, a: NodeId, c: Vec<f64>) -> NodeId {
        assert_eq!(self.numel(a), c.len(), "mul_const: length mismatch");
        self.unary(Op::MulConst(c.into()), a)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sin, a)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Cos, a)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Tanh, a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Exp, a)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sqrt, a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Square, a)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Relu, a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, a)
    }

    /// Heaviside step `x > 0`; its derivative is zero everywhere.
    pub fn step(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Step, a)
    }

    pub fn max_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::MaxConst(c), a)
    }

    pub fn min_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::MinConst(c), a)
    }

    /// Wraps angles to `(-π, π]`; the adjoint is the identity.
    pub fn wrap_angle(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::WrapAngle, a)
    }

    // ---- linear algebra and images ----

    /// `a: [m, k]` times `b: [k]` or `b: [k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert_eq!(sa.len(), 2, "matmul: lhs must be a matrix, got {sa:?}");
        assert_eq!(sa[1], sb[0], "matmul: inner dimensions {sa:?} x {sb:?}");
        let shape = match sb.len() {
            1 => vec![sa[0]],
            2 => vec![sa[0], sb[1]],
            _ => panic!("matmul: rhs must be a vector or matrix, got {sb:?}"),
        };
        self.push(Op::MatMul, vec![a, b], shape)
    }

    /// Valid-padding convolution of `x: [C, H, W]` with `w: [F, C, kh, kw]`
    /// plus bias `b: [F]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> NodeId {
        let d = self.conv_dims(x, w, stride);
        assert_eq!(self.numel(b), d.filters, "conv2d: bias length");
        self.push(
            Op::Conv2d { stride },
            vec![x, w, b],
            vec![d.filters, d.out_h(), d.out_w()],
        )
    }

    fn conv_dims(&self, x: NodeId, w: NodeId, stride: usize) -> ConvDims {
        let (sx, sw) = (self.shape(x), self.shape(w));
        assert!(sx.len() == 3 && sw.len() == 4, "conv2d: shapes {sx:?} {sw:?}");
        assert_eq!(sx[0], sw[1], "conv2d: channel mismatch");
        assert!(sx[1] >= sw[2] && sx[2] >= sw[3], "conv2d: kernel larger than input");
        ConvDims {
            channels: sx[0],
            height: sx[1],
            width: sx[2],
            filters: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
        }
    }

    /// Non-overlapping max-pooling over `size × size` windows of `[C, H, W]`.
    pub fn max_pool2d(&mut self, x: NodeId, size: usize) -> NodeId {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "max_pool2d: expects [C, H, W]");
        self.push(
            Op::MaxPool2d { size },
            vec![x],
            vec![s[0], s[1] / size, s[2] / size],
        )
    }

    // ---- structural ----

    /// Concatenates the flattened inputs.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let n = parts.iter().map(|&p| self.numel(p)).sum();
        self.push(Op::Concat, parts.to_vec(), vec![n])
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        assert!(start + len <= self.numel(a), "slice out of range");
        self.push(Op::Slice { start, len }, vec![a], vec![len])
    }

    /// Places `a` at `start` inside a zero vector of length `total`.
    pub fn pad_slice(&mut self, a: NodeId, start: usize, total: usize) -> NodeId {
        assert!(start + self.numel(a) <= total, "pad_slice out of range");
        self.push(Op::PadSlice { start, total }, vec![a], vec![total])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        assert_eq!(
            self.numel(a),
            shape.iter().product::<usize>(),
            "reshape: element count"
        );
        self.push(Op::Reshape, vec![a], shape.to_vec())
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum, vec![a], vec![1])
    }

    /// Repeats a scalar `n` times.
    pub fn broadcast(&mut self, a: NodeId, n: usize) -> NodeId {
        assert_eq!(self.numel(a), 1, "broadcast expects a scalar");
        self.push(Op::Broadcast, vec![a], vec![n])
    }

    /// Euclidean norm; its adjoint at the zero vector is defined as zero.
    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::L2Norm, vec![a], vec![1])
    }

    /// Inclusive prefix sum of the flattened input.
    pub fn cumsum(&mut self, a: NodeId) -> NodeId {
        let n = self.numel(a);
        self.push(Op::CumSum, vec![a], vec![n])
    }

    /// Inclusive suffix sum of the flattened input.
    pub fn rev_cumsum(&mut self, a: NodeId) -> NodeId {
        let n = self.numel(a);
        self.push(Op::RevCumSum, vec![a], vec![n])
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[NodeId]) -> NodeId {
        let shapes: Vec<&[usize]> = inputs.iter().map(|&i| self.shape(i)).collect();
        let shape = op.output_shape(&shapes);
        self.push(Op::Custom(op), inputs.to_vec(), shape)
    }

    // ---- evaluation ----

    /// Evaluates every node that does not yet have a cached value.
    ///
    /// Nodes appended after an earlier `forward` are evaluated incrementally;
    /// cached values are never recomputed.
    pub fn forward(&mut self, params: &ParamStore, bindings: &Bindings) -> Result<()> {
        for i in 0..self.nodes.len() {
            if self.values[i].is_some() {
                continue;
            }
            let (data, argmax) = self.eval_node(i, params, bindings)?;
            if let Some(idx) = argmax {
                self.argmax.insert(i, idx);
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(AutodiffError::NonFinite {
                    node: i,
                    op: self.nodes[i].op.name(),
                });
            }
            let shape = self.nodes[i].shape.clone();
            self.values[i] = Some(Tensor::new(&shape, data));
        }
        Ok(())
    }

    /// Forward pass for graphs without parameters or placeholders.
    pub fn eval(&mut self) -> Result<()> {
        self.forward(&ParamStore::default(), &Bindings::default())
    }

    fn val(&self, id: NodeId) -> &[f64] {
        self.values[id.0]
            .as_ref()
            .expect("input evaluated before its consumer")
            .data()
    }

    fn eval_node(
        &self,
        i: usize,
        params: &ParamStore,
        bindings: &Bindings,
    ) -> Result<(Vec<f64>, Option<Vec<usize>>)> {
        let node = &self.nodes[i];
        let mut argmax = None;
        let inp = |k: usize| self.val(node.inputs[k]);
        let map = |f: &dyn Fn(f64) -> f64| inp(0).iter().map(|&x| f(x)).collect::<Vec<_>>();
        let out = match &node.op {
            Op::Placeholder(name) => {
                let t = bindings
                    .get(NodeId(i))
                    .ok_or_else(|| AutodiffError::UnboundLeaf {
                        node: i,
                        name: name.clone(),
                    })?;
                if t.shape() != node.shape.as_slice() {
                    return Err(AutodiffError::BindingShape {
                        node: i,
                        expected: node.shape.clone(),
                        got: t.shape().to_vec(),
                    });
                }
                t.data().to_vec()
            }
            Op::Param { id, name } => {
                if !params.contains(*id) || params.spec(*id).shape != node.shape {
                    return Err(AutodiffError::ParamShape {
                        name: name.clone(),
                        expected: node.shape.clone(),
                        got: if params.contains(*id) {
                            params.spec(*id).shape.clone()
                        } else {
                            vec![]
                        },
                    });
                }
                params.value(*id).to_vec()
            }
            Op::Constant => unreachable!("constants are evaluated at construction"),
            Op::Add => binary(inp(0), inp(1), |a, b| a + b),
            Op::Sub => binary(inp(0), inp(1), |a, b| a - b),
            Op::Mul => binary(inp(0), inp(1), |a, b| a * b),
            Op::Div => binary(inp(0), inp(1), |a, b| a / b),
            Op::Atan2 => binary(inp(0), inp(1), f64::atan2),
            Op::Neg => map(&|x| -x),
            Op::Scale(c) => map(&|x| c * x),
            Op::Offset(c) => map(&|x| x + c),
            Op::MulConst(c) => inp(0).iter().zip(c.iter()).map(|(x, c)| x * c).collect(),
            Op::Sin => map(&f64::sin),
            Op::Cos => map(&f64::cos),
            Op::Tanh => map(&f64::tanh),
            Op::Exp => map(&f64::exp),
            Op::Sqrt => map(&f64::sqrt),
            Op::Square => map(&|x| x * x),
            Op::Relu => map(&|x| if x > 0.0 { x } else { 0.0 }),
            Op::Sigmoid => map(&sigmoid),
            Op::Step => map(&|x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::MaxConst(c) => map(&|x| x.max(*c)),
            Op::MinConst(c) => map(&|x| x.min(*c)),
            Op::WrapAngle => map(&wrap_angle),
            Op::MatMul => {
                let (m, k, n) = self.matmul_dims(i);
                kernels::matmul(inp(0), inp(1), m, k, n)
            }
            Op::Conv2d { stride } => {
                let d = self.conv_dims(node.inputs[0], node.inputs[1], *stride);
                kernels::conv2d(inp(0), inp(1), inp(2), d)
            }
            Op::MaxPool2d { size } => {
                let s = self.shape(node.inputs[0]);
                let x = inp(0);
                let idx = kernels::maxpool_argmax(x, s[0], s[1], s[2], *size);
                let out = idx.iter().map(|&j| x[j]).collect();
                argmax = Some(idx);
                out
            }
            Op::Concat => {
                let mut out = Vec::with_capacity(node.shape[0]);
                for k in 0..node.inputs.len() {
                    out.extend_from_slice(inp(k));
                }
                out
            }
            Op::Slice { start, len } => inp(0)[*start..start + len].to_vec(),
            Op::PadSlice { start, total } => {
                let mut out = vec![0.0; *total];
                let a = inp(0);
                out[*start..start + a.len()].copy_from_slice(a);
                out
            }
            Op::Reshape => inp(0).to_vec(),
            Op::Sum => vec![inp(0).iter().sum()],
            Op::Broadcast => vec![inp(0)[0]; node.shape[0]],
            Op::L2Norm => vec![inp(0).iter().map(|x| x * x).sum::<f64>().sqrt()],
            Op::CumSum => {
                let mut acc = 0.0;
                inp(0)
                    .iter()
                    .map(|x| {
                        acc += x;
                        acc
                    })
                    .collect()
            }
            Op::RevCumSum => {
                let a = inp(0);
                let mut out = vec![0.0; a.len()];
                let mut acc = 0.0;
                for k in (0..a.len()).rev() {
                    acc += a[k];
                    out[k] = acc;
                }
                out
            }
            Op::Custom(op) => {
                let ins: Vec<&[f64]> = (0..node.inputs.len()).map(inp).collect();
                op.forward(&ins)
            }
        };
        Ok((out, argmax))
    }

    fn matmul_dims(&self, i: usize) -> (usize, usize, usize) {
        let node = &self.nodes[i];
        let sa = self.shape(node.inputs[0]);
        let sb = self.shape(node.inputs[1]);
        (sa[0], sa[1], if sb.len() == 2 { sb[1] } else { 1 })
    }

    // ---- reverse pass ----

    /// Gradient of the scalar `output` with respect to every leaf
    /// (placeholders and parameters).
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        self.reverse(output, None)
    }

    /// Like [`Graph::backward`], but parameter gradients are added straight
    /// into `store`'s gradient buffer. The returned gradients hold only the
    /// placeholder leaves.
    pub fn backward_into(&self, output: NodeId, store: &mut ParamStore) -> Result<Gradients> {
        self.reverse(output, Some(store))
    }

    fn reverse(&self, output: NodeId, mut store: Option<&mut ParamStore>) -> Result<Gradients> {
        let out = output.0;
        for i in 0..=out {
            if self.values[i].is_none() {
                return Err(AutodiffError::NotEvaluated { node: i });
            }
        }
        if self.numel(output) != 1 {
            return Err(AutodiffError::NonScalarOutput {
                node: out,
                numel: self.numel(output),
            });
        }

        let mut needs = vec![false; out + 1];
        for i in 0..=out {
            needs[i] = match self.nodes[i].op {
                Op::Placeholder(_) | Op::Param { .. } => true,
                Op::Constant => false,
                _ => self.nodes[i].inputs.iter().any(|p| needs[p.0]),
            };
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        grads[out] = Some(vec![1.0]);
        let mut leaves = HashMap::new();
        let mut shapes = HashMap::new();
        let mut params = Vec::new();

        for i in (0..=out).rev() {
            let node = &self.nodes[i];
            match &node.op {
                Op::Placeholder(_) | Op::Param { .. } => {
                    shapes.insert(NodeId(i), node.shape.clone());
                    if let Op::Param { id, .. } = node.op {
                        params.push((NodeId(i), id));
                    }
                    if let Some(g) = grads[i].take() {
                        leaves.insert(NodeId(i), Tensor::new(&node.shape, g));
                    }
                    continue;
                }
                Op::Constant => continue,
                _ => {}
            }
            let Some(g) = grads[i].take() else { continue };
            for (slot, &inp) in node.inputs.iter().enumerate() {
                if !needs[inp.0] {
                    continue;
                }
                let direct = match (&self.nodes[inp.0].op, store.as_deref_mut()) {
                    (Op::Param { id, .. }, Some(s)) => Some(s.grad_mut(*id)),
                    _ => None,
                };
                match direct {
                    Some(target) => self.adjoint(i, slot, &g, target),
                    None => {
                        let n = self.numel(inp);
                        let target = grads[inp.0].get_or_insert_with(|| vec![0.0; n]);
                        self.adjoint(i, slot, &g, target);
                    }
                }
            }
        }
        if store.is_some() {
            params.clear();
        }
        Ok(Gradients {
            leaves,
            shapes,
            params,
        })
    }

    /// Accumulates the adjoint of node `i` with respect to input `slot`.
    fn adjoint(&self, i: usize, slot: usize, g: &[f64], target: &mut [f64]) {
        let node = &self.nodes[i];
        let inp = |k: usize| self.val(node.inputs[k]);
        let y = self.val(NodeId(i));
        let n = g.len();
        match &node.op {
            Op::Placeholder(_) | Op::Param { .. } | Op::Constant => {}
            Op::Add => acc(target, n, |k| g[k]),
            Op::Sub => {
                let s = if slot == 0 { 1.0 } else { -1.0 };
                acc(target, n, |k| s * g[k])
            }
            Op::Mul => {
                let other = inp(1 - slot);
                acc(target, n, |k| g[k] * at(other, k))
            }
            Op::Div => {
                let b = inp(1);
                if slot == 0 {
                    acc(target, n, |k| g[k] / at(b, k))
                } else {
                    acc(target, n, |k| -g[k] * y[k] / at(b, k))
                }
            }
            Op::Atan2 => {
                let (ya, xa) = (inp(0), inp(1));
                acc(target, n, |k| {
                    let (yy, xx) = (at(ya, k), at(xa, k));
                    let r = xx * xx + yy * yy;
                    if slot == 0 {
                        g[k] * xx / r
                    } else {
                        -g[k] * yy / r
                    }
                })
            }
            Op::Neg => acc(target, n, |k| -g[k]),
            Op::Scale(c) => acc(target, n, |k| c * g[k]),
            Op::Offset(_) | Op::WrapAngle | Op::Reshape => acc(target, n, |k| g[k]),
            Op::MulConst(c) => acc(target, n, |k| c[k] * g[k]),
            Op::Sin => {
                let a = inp(0);
                acc(target, n, |k| g[k] * a[k].cos())
            }
            Op::Cos => {
                let a = inp(0);
                acc(target, n, |k| -g[k] * a[k].sin())
            }
            Op::Tanh => acc(target, n, |k| g[k] * (1.0 - y[k] * y[k])),
            Op::Exp => acc(target, n, |k| g[k] * y[k]),
            Op::Sqrt => acc(target, n, |k| g[k] * 0.5 / y[k]),
            Op::Square => {
                let a = inp(0);
                acc(target, n, |k| 2.0 * a[k] * g[k])
            }
            Op::Relu | Op::Step | Op::MaxConst(_) | Op::MinConst(_) => {
                let a = inp(0);
                let pass = |k: usize| match node.op {
                    Op::Relu => a[k] > 0.0,
                    Op::MaxConst(c) => a[k] > c,
                    Op::MinConst(c) => a[k] < c,
                    _ => false,
                };
                acc(target, n, |k| if pass(k) { g[k] } else { 0.0 })
            }
            Op::Sigmoid => acc(target, n, |k| g[k] * y[k] * (1.0 - y[k])),
            Op::MatMul => {
                let (m, kk, nn) = self.matmul_dims(i);
                if slot == 0 {
                    kernels::matmul_grad_a(g, inp(1), m, kk, nn, target)
                } else {
                    kernels::matmul_grad_b(g, inp(0), m, kk, nn, target)
                }
            }
            Op::Conv2d { stride } => {
                let d = self.conv_dims(node.inputs[0], node.inputs[1], *stride);
                match slot {
                    0 => kernels::conv2d_grad_input(g, inp(1), d, target),
                    1 => kernels::conv2d_grad_weight(g, inp(0), d, target),
                    _ => kernels::conv2d_grad_bias(g, d, target),
                }
            }
            Op::MaxPool2d { .. } => {
                for (gv, &j) in g.iter().zip(&self.argmax[&i]) {
                    target[j] += gv;
                }
            }
            Op::Concat => {
                let offset: usize = node.inputs[..slot].iter().map(|&p| self.numel(p)).sum();
                for (k, t) in target.iter_mut().enumerate() {
                    *t += g[offset + k];
                }
            }
            Op::Slice { start, .. } => {
                for (k, gv) in g.iter().enumerate() {
                    target[start + k] += gv;
                }
            }
            Op::PadSlice { start, .. } => {
                for (k, t) in target.iter_mut().enumerate() {
                    *t += g[start + k];
                }
            }
            Op::Sum => target.iter_mut().for_each(|t| *t += g[0]),
            Op::Broadcast => target[0] += g.iter().sum::<f64>(),
            Op::L2Norm => {
                if y[0] > 0.0 {
                    let a = inp(0);
                    for (t, x) in target.iter_mut().zip(a) {
                        *t += g[0] * x / y[0];
                    }
                }
            }
            Op::CumSum => {
                let mut s = 0.0;
                for k in (0..n).rev() {
                    s += g[k];
                    target[k] += s;
                }
            }
            Op::RevCumSum => {
                let mut s = 0.0;
                for k in 0..n {
                    s += g[k];
                    target[k] += s;
                }
            }
            Op::Custom(op) => {
                let ins: Vec<&[f64]> = (0..node.inputs.len()).map(inp).collect();
                op.backward(slot, &ins, y, g, target)
            }
        }
    }

    /// Fingerprint of every branch decision in the evaluated graph: the sign
    /// pattern at each kink (ReLU, step, clamps, angle wrap) and the max-pool
    /// winners.
    ///
    /// Two evaluations with the same signature lie on the same smooth piece,
    /// which is what a finite-difference oracle needs in order to be valid.
    pub fn nonsmooth_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut extra = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if self.values[i].is_none() {
                continue;
            }
            let bits = |pred: &dyn Fn(f64) -> bool, h: &mut DefaultHasher| {
                for &x in self.val(node.inputs[0]) {
                    pred(x).hash(h);
                }
            };
            match &node.op {
                Op::Relu | Op::Step => bits(&|x| x > 0.0, &mut h),
                Op::MaxConst(c) => bits(&|x| x > *c, &mut h),
                Op::MinConst(c) => bits(&|x| x < *c, &mut h),
                Op::WrapAngle => {
                    for &x in self.val(node.inputs[0]) {
                        ((x - wrap_angle(x)) / TAU).round().to_bits().hash(&mut h);
                    }
                }
                Op::MaxPool2d { .. } => self.argmax[&i].hash(&mut h),
                Op::Custom(op) => {
                    let ins: Vec<&[f64]> = node.inputs.iter().map(|&p| self.val(p)).collect();
                    extra.clear();
                    op.nonsmooth_state(&ins, &mut extra);
                    extra.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }
}
