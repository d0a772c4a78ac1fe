//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! Every tensor is immutable once created; differentiable operations record
//! their parents and a backward closure on the value itself, so the tape is
//! rebuilt from scratch on every forward pass (define-by-run). Calling
//! [`Tensor::backward`] on a scalar walks the recorded operations in reverse
//! execution order and accumulates gradients into every grad-enabled leaf.
//!
//! Layout is row-major throughout, with the N,C,H,W axis order for image
//! batches. Element type is generic: `f32` for training throughput, `f64`
//! for gradient-check suites.

mod ops;

pub(crate) use ops::bilinear_axis;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Floating-point element of a [`Tensor`]: `f32` or `f64`.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    /// Short name stored in serialized containers ("f32" / "f64").
    const DTYPE: &'static str;
    /// Size of one element in bytes.
    const WIDTH: usize;
    /// Largest representable value strictly below 1.
    const BELOW_ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: &'static str = "f32";
    const WIDTH: usize = 4;
    const BELOW_ONE: Self = 1.0 - f32::EPSILON / 2.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Element for f64 {
    const DTYPE: &'static str = "f64";
    const WIDTH: usize = 8;
    const BELOW_ONE: Self = 1.0 - f64::EPSILON / 2.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

/// Convert an `f64` literal into the element type. Total for both supported types.
#[inline]
pub fn num<T: Element>(v: f64) -> T {
    T::from_f64(v)
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Backward closure: given the gradient of the output and the parent tensors,
/// produce the gradient for each parent the engine asked for (`needs[i]`).
/// Entries for parents with `needs[i] == false` may be `None`.
type BackwardFn<T> = Box<dyn Fn(&[T], &[Tensor<T>], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Op<T: Element> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Element> {
    /// Monotonic creation id; execution order of the tape.
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    /// Leaves with this flag receive gradients that survive the backward pass.
    grad_enabled: bool,
    grad: RefCell<Option<Vec<T>>>,
    op: Option<Op<T>>,
}

/// Dense row-major tensor. Cloning is cheap (shared handle).
pub struct Tensor<T: Element> {
    inner: Rc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, grad_enabled={})",
            self.inner.shape, self.inner.grad_enabled
        )
    }
}

impl<T: Element> Tensor<T> {
    fn construct(data: Vec<T>, shape: Vec<usize>, grad_enabled: bool, op: Option<Op<T>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                grad_enabled,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    /// Leaf tensor outside the tape (inputs, constants).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} needs {} values, got {}",
                    shape, shape.iter().product::<usize>(), data.len()),
            });
        }
        Ok(Self::construct(data, shape.to_vec(), false, None))
    }

    /// Grad-enabled leaf tensor (trainable parameter or gradient-check input).
    pub fn param_from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(Self::construct(
            t.inner.data.clone(),
            t.inner.shape.clone(),
            true,
            None,
        ))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::construct(vec![T::zero(); shape.iter().product()], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::construct(vec![value; shape.iter().product()], shape.to_vec(), false, None)
    }

    /// Scalar (shape `[1]`) grad-enabled leaf.
    pub fn param_scalar(value: T) -> Self {
        Self::construct(vec![value], vec![1], true, None)
    }

    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        // Record on the tape only when gradients can flow through this value.
        let track = parents.iter().any(|p| p.requires_grad());
        let op = track.then_some(Op { parents, backward });
        Self::construct(data, shape, false, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    /// True when the tensor participates in gradient computation, either as a
    /// grad-enabled leaf or as the result of an operation on one.
    pub fn requires_grad(&self) -> bool {
        self.inner.grad_enabled || self.inner.op.is_some()
    }

    pub fn grad_enabled(&self) -> bool {
        self.inner.grad_enabled
    }

    /// Gradient accumulated by the last `backward` call, if any reached this tensor.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn scalar_value(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data[0]
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g) {
                    *e = *e + v;
                }
            }
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode differentiation from a scalar loss.
    ///
    /// Visits every recorded operation exactly once, in reverse execution
    /// order, and leaves the gradient of the loss with respect to each
    /// grad-enabled leaf in that leaf's `grad` slot. Intermediate gradients
    /// are dropped as soon as they have been propagated.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss {
                elements: self.numel(),
            });
        }

        // Collect the reachable sub-tape.
        let mut nodes: Vec<Tensor<T>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.inner.id) {
                continue;
            }
            if let Some(op) = &t.inner.op {
                for p in &op.parents {
                    if p.requires_grad() {
                        stack.push(p.clone());
                    }
                }
            }
            nodes.push(t);
        }
        // Creation ids are the execution order.
        nodes.sort_by_key(|t| t.inner.id);

        self.accumulate_grad(vec![T::one()]);

        for node in nodes.iter().rev() {
            let Some(op) = &node.inner.op else { continue };
            let dout = if node.inner.grad_enabled {
                // Grad-enabled non-leaf: keep its gradient visible after backward.
                node.inner.grad.borrow().clone()
            } else {
                node.inner.grad.borrow_mut().take()
            };
            let Some(dout) = dout else { continue };
            let needs: Vec<bool> = op.parents.iter().map(|p| p.requires_grad()).collect();
            let grads = (op.backward)(&dout, &op.parents, &needs);
            debug_assert_eq!(grads.len(), op.parents.len());
            for ((parent, need), grad) in op.parents.iter().zip(&needs).zip(grads) {
                if let (true, Some(g)) = (need, grad) {
                    debug_assert_eq!(g.len(), parent.numel());
                    parent.accumulate_grad(g);
                }
            }
        }
        Ok(())
    }
}
