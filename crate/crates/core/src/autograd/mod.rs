//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted node in a computation
//! graph. Primitive operations record their inputs and whatever they need for
//! the backward rule; [`Tensor::backward`] walks the graph once in reverse
//! topological order and accumulates gradients into every tensor that
//! requires them.
//!
//! Only the primitives the two network branches use are provided. There is no
//! general broadcasting: shapes must match exactly except for the bias add in
//! `linear`/`conv3d` and the per-channel affine in `batchnorm`.

mod check;
mod gemm;
mod norm;
mod ops;
mod volume;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::{Error, Result};

pub use check::{finite_difference_check, nudge_off_zero, FLOOR};
pub use norm::{batchnorm, dropout, RunningStats, BN_EPS, BN_MOMENTUM};
pub use ops::{
    add, affine, clamp, concat, exp, index_select, linear, ln, log_softmax, mean, mul, relu,
    reshape, row_matvec, row_scale, scatter_sum, segment_max, sigmoid, sum,
};
pub use volume::{conv3d, conv_out_extent, maxpool3d};

pub(crate) use gemm::gemm;

/// Train or eval behaviour for batchnorm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// The closed set of recorded primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    Conv3d,
    MaxPool3d,
    BatchNorm,
    Linear,
    Relu,
    Sigmoid,
    LogSoftmax,
    ScatterSum,
    Dropout,
    Add,
    Mul,
    Sum,
    Mean,
    Concat,
    IndexSelect,
    Reshape,
    Exp,
    Ln,
    Affine,
    Clamp,
    RowMatVec,
    RowScale,
    SegmentMax,
}

pub(crate) enum Op {
    Conv3d {
        input: Tensor,
        kernel: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    MaxPool3d {
        input: Tensor,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Tensor,
        gamma: Tensor,
        beta: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Linear {
        input: Tensor,
        weight: Tensor,
        bias: Tensor,
    },
    Relu(Tensor),
    Sigmoid(Tensor),
    LogSoftmax {
        input: Tensor,
        axis: usize,
    },
    ScatterSum {
        values: Tensor,
        targets: Vec<usize>,
    },
    Dropout {
        input: Tensor,
        scale: Vec<f64>,
    },
    Add(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Sum(Tensor),
    Mean(Tensor),
    Concat {
        inputs: Vec<Tensor>,
        axis: usize,
    },
    IndexSelect {
        input: Tensor,
        indices: Vec<usize>,
    },
    Reshape(Tensor),
    Exp(Tensor),
    Ln(Tensor),
    Affine {
        input: Tensor,
        scale: f64,
    },
    Clamp {
        input: Tensor,
        lo: f64,
        hi: f64,
    },
    RowMatVec {
        x: Tensor,
        mats: Tensor,
    },
    RowScale {
        x: Tensor,
        s: Tensor,
    },
    SegmentMax {
        input: Tensor,
        argmax: Vec<usize>,
    },
}

impl Op {
    pub(crate) fn kind(&self) -> PrimitiveKind {
        use PrimitiveKind as K;
        match self {
            Op::Conv3d { .. } => K::Conv3d,
            Op::MaxPool3d { .. } => K::MaxPool3d,
            Op::BatchNorm { .. } => K::BatchNorm,
            Op::Linear { .. } => K::Linear,
            Op::Relu(_) => K::Relu,
            Op::Sigmoid(_) => K::Sigmoid,
            Op::LogSoftmax { .. } => K::LogSoftmax,
            Op::ScatterSum { .. } => K::ScatterSum,
            Op::Dropout { .. } => K::Dropout,
            Op::Add(..) => K::Add,
            Op::Mul(..) => K::Mul,
            Op::Sum(_) => K::Sum,
            Op::Mean(_) => K::Mean,
            Op::Concat { .. } => K::Concat,
            Op::IndexSelect { .. } => K::IndexSelect,
            Op::Reshape(_) => K::Reshape,
            Op::Exp(_) => K::Exp,
            Op::Ln(_) => K::Ln,
            Op::Affine { .. } => K::Affine,
            Op::Clamp { .. } => K::Clamp,
            Op::RowMatVec { .. } => K::RowMatVec,
            Op::RowScale { .. } => K::RowScale,
            Op::SegmentMax { .. } => K::SegmentMax,
        }
    }

    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Conv3d {
                input,
                kernel,
                bias,
                ..
            } => vec![input, kernel, bias],
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![input, gamma, beta],
            Op::Linear {
                input,
                weight,
                bias,
            } => vec![input, weight, bias],
            Op::MaxPool3d { input, .. }
            | Op::LogSoftmax { input, .. }
            | Op::Dropout { input, .. }
            | Op::IndexSelect { input, .. }
            | Op::Affine { input, .. }
            | Op::Clamp { input, .. }
            | Op::SegmentMax { input, .. } => vec![input],
            Op::ScatterSum { values, .. } => vec![values],
            Op::Relu(t)
            | Op::Sigmoid(t)
            | Op::Sum(t)
            | Op::Mean(t)
            | Op::Reshape(t)
            | Op::Exp(t)
            | Op::Ln(t) => vec![t],
            Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Concat { inputs, .. } => inputs.iter().collect(),
            Op::RowMatVec { x, mats } => vec![x, mats],
            Op::RowScale { x, s } => vec![x, s],
        }
    }
}

pub(crate) struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Option<Op>,
    grad: Mutex<Option<Vec<f64>>>,
}

/// An n-dimensional array of `f64` with optional gradient tracking.
///
/// Cloning is cheap and shares the node.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(Op::kind))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// A constant (no gradient) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// A trainable leaf tensor.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::raw(data, shape.to_vec(), requires_grad, None))
    }

    pub fn scalar(v: f64) -> Self {
        Self::raw(vec![v], vec![], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::raw(vec![0.0; numel(shape)], shape.to_vec(), false, None)
    }

    pub(crate) fn raw(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Option<Op>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            data,
            shape,
            requires_grad,
            op,
            grad: Mutex::new(None),
        }))
    }

    /// Output of a primitive: tracked only when some input is tracked.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Self {
        let tracked = op.parents().iter().any(|p| p.requires_grad());
        if tracked {
            Self::raw(data, shape, true, Some(op))
        } else {
            Self::raw(data, shape, false, None)
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The recorded producing primitive, `None` for leaves and constants.
    pub fn kind(&self) -> Option<PrimitiveKind> {
        self.0.op.as_ref().map(Op::kind)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Accumulated gradient, absent until a backward pass reaches this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// A constant copy cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Self::raw(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Back-propagates from this one-element tensor.
    ///
    /// Gradients accumulate: calling `backward` twice without
    /// [`Tensor::zero_grad`] adds the second pass onto the first.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(op) = &node.0.op {
                for (parent, pg) in backward_rule(op, node, &g) {
                    if !parent.requires_grad() {
                        continue;
                    }
                    match pending.get_mut(&parent.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(parent.id(), pg);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.lock().expect("grad lock");
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Tracked nodes reachable from `self`, parents before children.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // Iterative post-order DFS; deep graphs would overflow recursion.
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.op {
                for p in op.parents() {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

fn backward_rule(op: &Op, out: &Tensor, g: &[f64]) -> Vec<(Tensor, Vec<f64>)> {
    match op {
        Op::Conv3d {
            input,
            kernel,
            bias,
            stride,
            padding,
        } => volume::conv3d_backward(input, kernel, bias, *stride, *padding, out.shape(), g),
        Op::MaxPool3d { input, argmax } => vec![(input.clone(), ops::route(input.numel(), argmax, g))],
        Op::BatchNorm {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => norm::batchnorm_backward(input, gamma, beta, xhat, inv_std, *batch_stats, g),
        Op::Dropout { input, scale } => vec![(
            input.clone(),
            g.iter().zip(scale).map(|(g, s)| g * s).collect(),
        )],
        _ => ops::backward(op, out, g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::param(vec![1.0, -2.0, 3.0], &[3]).unwrap();
        sum(&x).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = sum(&mul(&x, &x).unwrap());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn constants_get_no_grad() {
        let c = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let x = Tensor::param(vec![3.0, 4.0], &[2]).unwrap();
        sum(&mul(&c, &x).unwrap()).backward().unwrap();
        assert!(c.grad().is_none());
        assert_eq!(x.grad().unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn reused_tensor_sums_contributions() {
        // f(x) = sum(x) * sum(x) -> df/dx_i = 2 * sum(x)
        let x = Tensor::param(vec![1.0, 2.0, 4.0], &[3]).unwrap();
        let s = sum(&x);
        let f = mul(&s, &s).unwrap();
        f.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![14.0, 14.0, 14.0]);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = sum(&x);
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = relu(&x);
        assert!(matches!(y.backward(), Err(Error::Shape(_))));
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![1.0; 5], &[2, 3]).is_err());
    }

    #[test]
    fn untracked_ops_record_nothing() {
        let a = Tensor::new(vec![1.0], &[1]).unwrap();
        let b = add(&a, &a).unwrap();
        assert!(!b.requires_grad());
        assert!(b.kind().is_none());
    }
}
