use std::cell::RefCell;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward closure sees: the op's input values, its output value,
/// the upstream gradient, and which inputs need a gradient at all.
pub struct BackwardCtx<'a, T> {
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    pub grad: &'a [T],
    pub needs: &'a [bool],
}

/// Returns one optional gradient per input, in input order.
pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Operation tape for one forward pass.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// Records a differentiable leaf (a parameter or a checked input).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, mut value: Tensor<T>, requires_grad: bool) -> Var {
        // grads live on the tape, not on recorded values
        let _ = value.set_grad(None);
        self.nodes.push(Node {
            op: "leaf",
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    /// Records the result of a custom operation.
    ///
    /// `backward` is only invoked when at least one input requires a gradient.
    pub fn push_op(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            inputs: inputs.to_vec(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagates from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if root.0 >= self.nodes.len() {
            return Err(Error::invalid("backward", "root is not on this graph"));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![T::one(); self.nodes[root.0].value.numel()]);
        let fault = FAULT.with(|f| *f.borrow());

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> =
                node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let ctx = BackwardCtx {
                inputs: &inputs,
                output: &node.value,
                grad: &grad,
                needs: &needs,
            };
            let mut input_grads = backward(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            if fault == Some(node.op) {
                let skew = T::from_f64(1.25);
                for g in input_grads.iter_mut().flatten() {
                    g.iter_mut().for_each(|v| *v *= skew);
                }
            }
            for (var, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &d)| *a += d),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of the backward root with respect to recorded leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

thread_local! {
    static FAULT: RefCell<Option<&'static str>> = const { RefCell::new(None) };
}

/// Runs `f` with the backward pass of every `op` node deliberately skewed.
///
/// Used to confirm that the gradient checks actually detect a broken
/// backward implementation. Only affects the current thread.
pub fn corrupt_backward<R>(op: &'static str, f: impl FnOnce() -> R) -> R {
    let prev = FAULT.with(|cell| cell.replace(Some(op)));
    let out = f();
    FAULT.with(|cell| *cell.borrow_mut() = prev);
    out
}
