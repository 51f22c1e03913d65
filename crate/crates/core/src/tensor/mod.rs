//! Dense tensors with reverse-mode differentiation.
//!
//! Every tensor is an immutable value. An operation whose inputs require
//! gradients records a node holding its inputs and a backward closure; the
//! node's id is drawn from a monotone counter, so sorting reachable nodes by
//! descending id replays the tape in reverse execution order.
//!
//! Layout is channels-first: a single volume is `C x X x Y x Z`, a batch is
//! `N x C x X x Y x Z`, with `Z` varying fastest.

mod conv;
mod ops;
mod runtime;
mod scalar;
mod upsample;

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use conv::{conv2d, conv3d, ConvGeometry};
pub use ops::concat;
pub use runtime::{is_checked, is_parallel, no_grad, set_checked, set_parallel, NoGradGuard};
pub use scalar::{DType, Scalar};
pub(crate) use scalar::{gemm, MatRef};
pub use upsample::{interp_taps, InterpTap};

type BackwardFn<S> = Box<dyn Fn(&[S]) -> Vec<Option<Vec<S>>>>;

struct GradFn<S: Scalar> {
    op: &'static str,
    inputs: Vec<Tensor<S>>,
    backward: BackwardFn<S>,
}

struct Node<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<S>>>,
    grad_fn: Option<GradFn<S>>,
}

/// An n-dimensional array taking part in reverse-mode differentiation.
///
/// Cloning is cheap: clones share the same node.
pub struct Tensor<S: Scalar = f32> {
    node: Rc<Node<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.node.shape);
        if self.numel() <= 16 {
            d.field("data", &self.node.data);
        }
        d.field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.grad_fn.as_ref().map(|g| g.op))
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    fn leaf(shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Self {
        Tensor {
            node: Rc::new(Node {
                id: runtime::next_id(),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                grad_fn: None,
            }),
        }
    }

    /// Builds a constant tensor. Fails when `data.len()` disagrees with `shape`.
    pub fn from_vec(data: Vec<S>, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::dim(
                "from_vec",
                None,
                format!("shape {shape:?} needs {} values, got {}", numel_of(shape), data.len()),
            ));
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![S::zero(); numel_of(shape)], false)
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Self::leaf(shape.to_vec(), vec![value; numel_of(shape)], false)
    }

    pub fn scalar(value: S) -> Self {
        Self::leaf(Vec::new(), vec![value], false)
    }

    /// Returns a leaf that shares this tensor's values and collects gradients.
    pub fn requires_grad(self) -> Self {
        Self::leaf(self.node.shape.clone(), self.node.data.clone(), true)
    }

    /// Returns a constant copy cut off from the tape.
    pub fn detach(&self) -> Self {
        Self::leaf(self.node.shape.clone(), self.node.data.clone(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.node.data.clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.numel(), 1);
        self.node.data[0]
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn tracks_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass has reached it.
    pub fn grad(&self) -> Option<Ref<'_, Vec<S>>> {
        let g = self.node.grad.borrow();
        if g.is_some() {
            Some(Ref::map(g, |g| g.as_ref().unwrap()))
        } else {
            None
        }
    }

    pub fn grad_vec(&self) -> Option<Vec<S>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Identity of the underlying node; clones compare equal.
    pub fn same_node(&self, other: &Tensor<S>) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }

    /// Converts to another scalar type as a constant.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data = self.node.data.iter().map(|v| T::of(v.as_f64())).collect();
        Tensor::leaf(self.node.shape.clone(), data, false)
    }

    /// Records the result of an operation.
    ///
    /// When no input tracks gradients (or gradients are globally disabled),
    /// the inputs and closure are dropped and a constant is returned.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<S>,
        inputs: Vec<Tensor<S>>,
        backward: impl Fn(&[S]) -> Vec<Option<Vec<S>>> + 'static,
    ) -> Result<Self> {
        debug_assert_eq!(numel_of(&shape), data.len(), "{op}: output shape");
        if runtime::is_checked() && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        let track = runtime::grad_enabled() && inputs.iter().any(|t| t.node.requires_grad);
        if !track {
            return Ok(Self::leaf(shape, data, false));
        }
        Ok(Tensor {
            node: Rc::new(Node {
                id: runtime::next_id(),
                shape,
                data,
                requires_grad: true,
                grad: RefCell::new(None),
                grad_fn: Some(GradFn {
                    op,
                    inputs,
                    backward: Box::new(backward),
                }),
            }),
        })
    }

    /// Back-propagates from a one-element tensor into every reachable leaf
    /// that requires gradients. Leaf gradients accumulate across calls.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::arg(
                "backward",
                format!("loss must hold one value, shape is {:?}", self.shape()),
            ));
        }
        if !self.node.requires_grad {
            return Ok(());
        }

        let mut order: Vec<Tensor<S>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.node.requires_grad || !seen.insert(t.node.id) {
                continue;
            }
            if let Some(gf) = &t.node.grad_fn {
                stack.extend(gf.inputs.iter().cloned());
            }
            order.push(t);
        }
        order.sort_unstable_by(|a, b| b.node.id.cmp(&a.node.id));

        let mut pending: HashMap<u64, Vec<S>> = HashMap::new();
        pending.insert(self.node.id, vec![S::one()]);
        for t in &order {
            let Some(g) = pending.remove(&t.node.id) else {
                continue;
            };
            match &t.node.grad_fn {
                None => {
                    let mut slot = t.node.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += *v),
                        None => *slot = Some(g),
                    }
                }
                Some(gf) => {
                    let grads = (gf.backward)(&g);
                    debug_assert_eq!(grads.len(), gf.inputs.len(), "{}: backward arity", gf.op);
                    for (input, gi) in gf.inputs.iter().zip(grads) {
                        let Some(gi) = gi else { continue };
                        if !input.node.requires_grad {
                            continue;
                        }
                        debug_assert_eq!(gi.len(), input.numel(), "{}: gradient length", gf.op);
                        match pending.get_mut(&input.node.id) {
                            Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, v)| *a += *v),
                            None => {
                                pending.insert(input.node.id, gi);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Tensor<S> {
    /// Values as `f64`, for reporting.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.iter().map(|v| v.as_f64()).collect()
    }
}

/// Row-major strides of a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}
