//! Define-by-run reverse-mode differentiation.
//!
//! Every op appends a node to the [`Tape`]. Node ids are assigned in
//! creation order, which is already a topological order, so the backward
//! sweep walks ids in reverse and visits each node once.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Vector-Jacobian product of one node.
///
/// Receives the gradient of the node output and a flag per parent saying
/// whether that parent needs a gradient; returns one entry per parent.
pub type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T: Real = f64> {
    nodes: RefCell<Vec<Node<T>>>,
    leaf_grads: RefCell<HashMap<usize, Vec<T>>>,
    planner: RefCell<FftPlanner<T>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f64> {
    tape: &'t Tape<T>,
    id: usize,
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
            leaf_grads: RefCell::new(HashMap::new()),
            planner: RefCell::new(FftPlanner::new()),
        }
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad: false,
            parents: vec![],
            backward: None,
        })
    }

    /// Leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad: true,
            parents: vec![],
            backward: None,
        })
    }

    /// Records a derived node. `backward` is dropped when no parent needs a
    /// gradient.
    pub fn push_op<'t>(
        &'t self,
        value: Tensor<T>,
        parents: &[Var<'t, T>],
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Var<'t, T> {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn fft_plans(&self, h: usize, w: usize, inverse: bool) -> (Arc<dyn Fft<T>>, Arc<dyn Fft<T>>) {
        let mut p = self.planner.borrow_mut();
        if inverse {
            (p.plan_fft_inverse(h), p.plan_fft_inverse(w))
        } else {
            (p.plan_fft_forward(h), p.plan_fft_forward(w))
        }
    }

    /// Propagates d`loss` to every reachable parameter leaf, adding into any
    /// gradient already accumulated there.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 || root.value.shape().len() > 1 {
            return Err(TensorError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.id + 1);
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![T::one()]);
        let mut leaf_grads = self.leaf_grads.borrow_mut();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(bw) = &node.backward else {
                // requires_grad leaf
                match leaf_grads.get_mut(&id) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => {
                        leaf_grads.insert(id, g);
                    }
                }
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = bw(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(pg), true) = (pg, *need) else { continue };
                debug_assert_eq!(pg.len(), nodes[p].value.numel());
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a parameter leaf, if any reached it.
    pub fn grad(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        let g = self.leaf_grads.borrow().get(&var.id).cloned()?;
        let shape = self.nodes.borrow()[var.id].value.shape().to_vec();
        Some(Tensor::new(shape, g).expect("gradient matches value shape"))
    }

    /// Like [`Tape::grad`] but zeros when nothing reached the leaf.
    pub fn grad_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.grad(var)
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn zero_grad(&self) {
        self.leaf_grads.borrow_mut().clear();
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> T {
        self.value().item()
    }

    pub(crate) fn same_tape(&self, other: &Var<'t, T>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::contract(op, "operands live on different tapes"))
        }
    }
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}
