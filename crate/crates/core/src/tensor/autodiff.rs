use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Vector-Jacobian product of one recorded op.
///
/// Receives the gradient w.r.t. the op output, the output value and the
/// parent nodes; returns one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &Tensor<T>, &[Var<T>]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: RefCell<Option<Tensor<T>>>,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
    op: &'static str,
}

/// A node in the computation graph.
///
/// Graph edges are only retained when at least one input requires a
/// gradient, so inference-only evaluation frees intermediates eagerly.
pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("op", &self.0.op)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Real> Var<T> {
    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            value,
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
            op: "leaf",
        }))
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    pub(crate) fn from_op(
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires_grad = parents.iter().any(Var::requires_grad);
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Var(Rc::new(Node {
            value,
            requires_grad,
            grad: RefCell::new(None),
            parents,
            backward,
            op,
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Ref<'_, Tensor<T>>> {
        Ref::filter_map(self.0.grad.borrow(), Option::as_ref).ok()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn key(&self) -> *const Node<T> {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls.
    pub fn backward(&self) -> Result<()> {
        if !self.value().is_scalar() {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut grads: HashMap<*const Node<T>, Tensor<T>> = HashMap::new();
        grads.insert(self.key(), Tensor::full(self.shape().to_vec(), T::one()));

        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.key()) else {
                continue;
            };
            let inner = &node.0;
            let Some(backward) = inner.backward.as_ref() else {
                let mut slot = inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => *slot = Some(g),
                }
                continue;
            };
            let parent_grads = backward(&g, &inner.value, &inner.parents);
            debug_assert_eq!(parent_grads.len(), inner.parents.len(), "{}", inner.op);
            for (parent, pg) in inner.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.shape(), parent.shape(), "grad shape of {}", inner.op);
                match grads.get_mut(&parent.key()) {
                    Some(acc) => acc.add_assign(&pg),
                    None => {
                        grads.insert(parent.key(), pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over gradient-carrying nodes, iterative to survive deep graphs.
    fn topo_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node<T>> = HashSet::new();
        let mut stack: Vec<(Var<T>, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.key());
        while let Some((node, child)) = stack.pop() {
            if let Some(parent) = node.0.parents.get(child) {
                let parent = parent.clone();
                stack.push((node, child + 1));
                if parent.requires_grad() && seen.insert(parent.key()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}
