//! The operation tape and differentiable variable handles.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::backward::backward_op;
use crate::{Array, Error, Result};

/// Padding applied by patch extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror about the edge sample without repeating it.
    Reflect,
}

/// Geometry of a patch extraction (`im2col`) over an `H×W×C` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
}

impl PatchSpec {
    /// Stride-1 patches centred on each pixel (odd kernels only).
    pub fn same(kernel: usize, mode: PadMode) -> Self {
        Self { kernel, stride: 1, pad: kernel / 2, mode }
    }

    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        let oh = (height + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (width + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }
}

/// Recorded operation together with whatever its backward rule needs.
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar,
    Exp,
    Log,
    Sqrt,
    PowF(f64),
    Sin,
    Cos,
    Gelu,
    Elementwise { derivative: fn(f64) -> f64 },
    MatMul,
    Reshape,
    Permute(Vec<usize>),
    Concat { axis: usize },
    Gather { index: Rc<Vec<usize>> },
    Softmax,
    LayerNorm { rstd: Vec<f64> },
    SumAll,
    MeanAll,
    SumAxis { axis: usize },
    MeanAxis { axis: usize },
    Im2Col { spec: PatchSpec, positions: Rc<Vec<(usize, usize)>> },
    UpsampleNearest { factor: usize },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::PowF(_) => "powf",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Gelu => "gelu",
            Op::Elementwise { .. } => "elementwise",
            Op::MatMul => "matmul",
            Op::Reshape => "reshape",
            Op::Permute(_) => "permute",
            Op::Concat { .. } => "concat",
            Op::Gather { .. } => "gather",
            Op::Softmax => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SumAll => "sum",
            Op::MeanAll => "mean",
            Op::SumAxis { .. } => "sum_axis",
            Op::MeanAxis { .. } => "mean_axis",
            Op::Im2Col { .. } => "im2col",
            Op::UpsampleNearest { .. } => "upsample_nearest",
        }
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    /// Tape ids of tracked inputs; `None` for constants.
    pub(crate) inputs: Vec<Option<usize>>,
    pub(crate) input_values: Vec<Rc<Array>>,
    pub(crate) value: Rc<Array>,
}

/// Ordered record of executed operations.
///
/// Nodes are appended as operations run, so a node's inputs always precede
/// it. A tape built with [`Tape::no_grad`] records nothing and intermediate
/// values are freed as soon as their handles drop.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
    stage: Cell<&'static str>,
    flops: RefCell<BTreeMap<&'static str, u64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            stage: Cell::new("other"),
            flops: RefCell::new(BTreeMap::new()),
        }
    }

    /// A tape that evaluates values only.
    pub fn no_grad() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Array) -> Var<'_> {
        Var { tape: self, id: None, value: Rc::new(value) }
    }

    /// A leaf that receives a gradient on [`Tape::backward`].
    pub fn param(&self, value: Array) -> Var<'_> {
        let value = Rc::new(value);
        if !self.grad_enabled {
            return Var { tape: self, id: None, value };
        }
        let id = self.push(Op::Leaf, Vec::new(), Vec::new(), value.clone());
        Var { tape: self, id: Some(id), value }
    }

    /// Labels subsequent matrix-product FLOPs with `stage`.
    pub fn set_stage(&self, stage: &'static str) {
        self.stage.set(stage);
    }

    pub fn stage(&self) -> &'static str {
        self.stage.get()
    }

    /// FLOPs of matrix products (2·m·k·n each) grouped by stage label.
    pub fn flops(&self) -> BTreeMap<&'static str, u64> {
        self.flops.borrow().clone()
    }

    pub fn reset_flops(&self) {
        self.flops.borrow_mut().clear();
    }

    pub(crate) fn count_flops(&self, n: u64) {
        *self.flops.borrow_mut().entry(self.stage.get()).or_insert(0) += n;
    }

    fn push(&self, op: Op, inputs: Vec<Option<usize>>, input_values: Vec<Rc<Array>>, value: Rc<Array>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, inputs, input_values, value });
        nodes.len() - 1
    }

    /// Wraps a freshly computed value, recording it when any input is tracked.
    pub(crate) fn record(&self, op: Op, inputs: &[&Var<'_>], value: Array) -> Result<Var<'_>> {
        if cfg!(debug_assertions) && inputs.iter().all(|v| v.value.is_finite()) && !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let value = Rc::new(value);
        let tracked = self.grad_enabled && inputs.iter().any(|v| v.id.is_some());
        if !tracked {
            return Ok(Var { tape: self, id: None, value });
        }
        let ids = inputs.iter().map(|v| v.id).collect();
        let values = inputs.iter().map(|v| v.value.clone()).collect();
        let id = self.push(op, ids, values, value.clone());
        Ok(Var { tape: self, id: Some(id), value })
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients> {
        if loss.value.len() != 1 {
            return Err(Error::NonScalarLoss(loss.value.shape().to_vec()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Array>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root) = loss.id else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Array::full(loss.value.shape().to_vec(), 1.0));
        for id in (0..=root).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let input_values: Vec<&Array> = node.input_values.iter().map(|v| &**v).collect();
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward_op(&node.op, &input_values, &node.value, &grad_out, &needs)?;
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let (Some(input), Some(g)) = (*input, g) else { continue };
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by one reverse pass.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, var: &Var<'_>) -> Option<&Array> {
        var.id.and_then(|id| self.grads.get(id)).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, zeros when it is not on the path to the loss.
    pub fn wrt(&self, var: &Var<'_>) -> Array {
        self.get(var).cloned().unwrap_or_else(|| Array::zeros(var.value.shape().to_vec()))
    }
}

/// Handle to a value computed on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: Option<usize>,
    pub(crate) value: Rc<Array>,
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Array {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    pub fn item(&self) -> Result<f64> {
        self.value.item()
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.value.shape()).finish()
    }
}
