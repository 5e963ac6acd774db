use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicBool, Ordering};

use super::{Float, Tensor};
use crate::error::{Error, Result};

static BACKWARD_FAULT: AtomicBool = AtomicBool::new(false);

/// Verification hook: while enabled, every propagated gradient is scaled by
/// 1.001 so gradient checks must fail.
pub fn inject_backward_fault(enabled: bool) {
    BACKWARD_FAULT.store(enabled, Ordering::SeqCst);
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded primitive.
pub trait Op<T: Float>: Send {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product: one entry per input, `None` when the input
    /// does not need a gradient (see [`BackwardCtx::needs`]).
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>;
}

/// Everything an [`Op`] may read while propagating gradients.
pub struct BackwardCtx<'a, T> {
    inputs: Vec<&'a Tensor<T>>,
    needs: Vec<bool>,
    output: &'a Tensor<T>,
    grad: &'a Tensor<T>,
}

impl<'a, T> BackwardCtx<'a, T> {
    pub fn input(&self, i: usize) -> &'a Tensor<T> {
        self.inputs[i]
    }

    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }

    pub fn output(&self) -> &'a Tensor<T> {
        self.output
    }

    /// Gradient of the loss with respect to this op's output.
    pub fn grad(&self) -> &'a Tensor<T> {
        self.grad
    }
}

struct Node<T: Float> {
    value: Option<Tensor<T>>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Op<T>>>,
    requires_grad: bool,
}

/// Ordered record of executed primitives. Nodes are appended in execution
/// order, so every op's inputs precede it.
pub struct Tape<T: Float> {
    nodes: Vec<Node<T>>,
    branches: Option<DefaultHasher>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            branches: None,
        }
    }

    /// A tape that hashes every discrete decision (argmax slots, activation
    /// signs, neighbor lists) so two evaluations can be compared for a
    /// change of branch.
    pub fn with_branch_tracking() -> Self {
        Tape {
            nodes: Vec::new(),
            branches: Some(DefaultHasher::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every recorded node, in execution order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            inputs: Vec::new(),
            op: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records `op` applied to `inputs` with its already computed `value`.
    pub fn push(&mut self, op: impl Op<T> + 'static, inputs: &[Var], value: Tensor<T>) -> Var {
        // A NaN or infinity is reported where it first appears. The scan is
        // cheap next to any op, so it stays on in optimized builds.
        assert!(value.all_finite(), "{} produced non-finite values", op.name());
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Ops nobody differentiates through keep no saved state.
        let op: Option<Box<dyn Op<T>>> = if requires_grad {
            Some(Box::new(op))
        } else {
            None
        };
        self.nodes.push(Node {
            value: Some(value),
            inputs: inputs.to_vec(),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("tape value was released by a consuming backward pass")
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Whether `v` is an input leaf rather than an op output.
    pub fn is_leaf(&self, v: Var) -> bool {
        self.nodes[v.0].inputs.is_empty() && self.nodes[v.0].op.is_none()
    }

    pub fn tracks_branches(&self) -> bool {
        self.branches.is_some()
    }

    pub fn note_branch<H: Hash + ?Sized>(&mut self, decision: &H) {
        if let Some(h) = self.branches.as_mut() {
            decision.hash(h);
        }
    }

    pub fn branch_signature(&self) -> Option<u64> {
        self.branches.as_ref().map(|h| h.finish())
    }

    /// Reverse-mode accumulation from a one-element `loss`. Gradients are
    /// summed in tape order, so repeated calls are bit-identical.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let mut grads = self.seed(loss)?;
        let mut out = Gradients::new(loss.0 + 1);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    /// Like [`Tape::backward`] but releases each node's value and saved
    /// state once it has been processed, keeping peak memory near the
    /// forward pass footprint.
    pub fn into_gradients(mut self, loss: Var) -> Result<Gradients<T>> {
        let mut grads = self.seed(loss)?;
        let mut out = Gradients::new(loss.0 + 1);
        self.nodes.truncate(loss.0 + 1);
        for i in (0..=loss.0).rev() {
            if let Some(g) = grads[i].take() {
                self.propagate(i, g, &mut grads, &mut out)?;
            }
            let node = &mut self.nodes[i];
            node.value = None;
            node.op = None;
        }
        Ok(out)
    }

    fn seed(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        let value = self.value(loss);
        if value.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must have one element, got shape {:?}", value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(value.shape().to_vec(), T::one()));
        Ok(grads)
    }

    fn propagate(
        &self,
        i: usize,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        out: &mut Gradients<T>,
    ) -> Result<()> {
        let node = &self.nodes[i];
        let Some(op) = node.op.as_ref() else {
            if node.requires_grad && node.inputs.is_empty() {
                out.grads[i] = Some(g);
            }
            return Ok(());
        };
        let ctx = BackwardCtx {
            inputs: node.inputs.iter().map(|v| self.value(*v)).collect(),
            needs: node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect(),
            output: node.value.as_ref().expect("value present"),
            grad: &g,
        };
        let mut input_grads = op.backward(&ctx);
        if BACKWARD_FAULT.load(Ordering::Relaxed) {
            for g in input_grads.iter_mut().flatten() {
                *g = g.map(|v| v * T::lit(1.001));
            }
        }
        debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
        for (v, ig) in node.inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !self.nodes[v.0].requires_grad {
                continue;
            }
            if ig.shape() != self.value(*v).shape() {
                return Err(Error::shape(op.name(), ig.shape(), self.value(*v).shape()));
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&ig),
                slot @ None => *slot = Some(ig),
            }
        }
        Ok(())
    }
}

/// Gradients of the loss with respect to every leaf that requires one.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    fn new(n: usize) -> Self {
        let mut grads = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        Gradients { grads }
    }

    /// Gradient for leaf `v`; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
