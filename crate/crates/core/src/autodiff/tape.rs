//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value, its parent node ids and a closure computing the
//! vector-Jacobian product. Node ids are assigned in execution order, so
//! walking them in reverse is a valid reverse topological order.
//!
//! Tapes are meant to live for a single training step: build one, run the
//! forward pass, call [`Var::backward`], read the gradients, drop the tape.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Arguments handed to a node's backward rule.
pub struct BackwardArgs<'a, T> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a Tensor<T>,
    /// Values of the parent nodes, in the order they were recorded.
    pub inputs: Vec<&'a Tensor<T>>,
    /// This node's forward value.
    pub output: &'a Tensor<T>,
    /// Which parents need a gradient. Rules may return `None` for the rest.
    pub needs: Vec<bool>,
}

pub type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// A differentiable leaf (parameter or input under test).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let id = self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
        });
        Var { tape: self, id }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        let id = self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        });
        Var { tape: self, id }
    }

    /// Records an operation output. The backward rule is dropped when no
    /// parent requires a gradient.
    pub fn record<'t>(
        &'t self,
        value: Tensor<T>,
        parents: &[Var<'t, T>],
        backward: BackwardFn<T>,
    ) -> Var<'t, T> {
        debug_assert!(parents.iter().all(|p| std::ptr::eq(p.tape, self)));
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let id = self.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var { tape: self, id }
    }

    fn backward_from(&self, loss: usize) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss).map(|_| None).collect();
        grads[loss] = Some(Tensor::ones(root.value.shape().to_vec()));
        let mut leaves = HashMap::new();

        for id in (0..=loss).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let Some(rule) = &node.backward else {
                if node.requires_grad {
                    leaves.insert(id, grad);
                }
                continue;
            };
            let args = BackwardArgs {
                grad: &grad,
                inputs: node.parents.iter().map(|&p| &nodes[p].value).collect(),
                output: &node.value,
                needs: node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect(),
            };
            let parent_grads = rule(&args);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(args.needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Handle to a node on a tape.
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Copy of the forward value, detached from the tape.
    pub fn to_tensor(&self) -> Tensor<T> {
        self.value().clone()
    }

    /// Runs reverse accumulation from this scalar. Leaves that the loss
    /// does not reach are absent from the result.
    pub fn backward(&self) -> Result<Gradients<T>> {
        self.tape.backward_from(self.id)
    }
}

/// Gradients of the requires-grad leaves reachable from a loss.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(&var.id)
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.leaves.remove(&var.id)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}
