//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The engine implements a deliberately closed set of kernels (convolution,
//! relu, add, nearest upsampling, softmax, sigmoid, pooling, reductions and a
//! few fusion helpers) so that every gradient rule can be verified against
//! central finite differences. Tensors are immutable after creation except
//! for their gradient buffer; the graph records each operation's operands and
//! gradient rule, and `backward` replays them in exact reverse order of
//! execution.

pub mod adam;
pub mod gradcheck;
pub mod init;
pub mod ops;

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};

/// Floating-point element type of the compute core.
///
/// Training normally runs in `f32`; gradient checking runs in `f64` because
/// central-difference tolerances are unreachable in single precision.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Gradient rule of one recorded operation: receives the output gradient and
/// accumulates contributions into the operands' gradient buffers.
type BackwardFn<T> = Box<dyn Fn(&[T]) + Send + Sync>;

struct Node<T: Scalar> {
    /// Creation order; strictly increasing, so descending ids are a reverse
    /// topological order of the graph.
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RwLock<Option<Vec<T>>>,
    /// Operands, kept alive for the backward traversal.
    parents: Vec<Tensor<T>>,
    backward_fn: Option<BackwardFn<T>>,
    /// Set once `backward` has consumed this node as a root.
    backward_ran: AtomicBool,
}

/// A dense row-major N-dimensional array, optionally tracked for gradients.
///
/// Cloning is cheap (reference count); the underlying buffer is shared and
/// immutable. Only the gradient buffer mutates, and only during `backward`.
pub struct Tensor<T: Scalar> {
    inner: Arc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

impl<T: Scalar> Tensor<T> {
    fn new_node(
        data: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward_fn: Option<BackwardFn<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: RwLock::new(None),
                parents,
                backward_fn,
                backward_ran: AtomicBool::new(false),
            }),
        }
    }

    /// Untracked leaf tensor from a flat row-major buffer.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} does not hold {} elements", shape, data.len()),
            ));
        }
        Ok(Self::new_node(data, shape.to_vec(), false, vec![], None))
    }

    /// Trainable leaf tensor (a parameter or tracked input).
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(Self::new_node(
            t.inner.data.clone(),
            t.inner.shape.clone(),
            true,
            vec![],
            None,
        ))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new_node(vec![T::zero(); numel], shape.to_vec(), false, vec![], None)
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self::new_node(vec![value; numel], shape.to_vec(), false, vec![], None)
    }

    pub fn scalar(value: T) -> Self {
        Self::new_node(vec![value], vec![1], false, vec![], None)
    }

    /// Result of an operation: output buffer, operands, and the gradient rule
    /// that scatters the output gradient back into the operands.
    ///
    /// If no operand is tracked the graph edge is pruned and the output is a
    /// plain untracked leaf.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward_fn: impl Fn(&[T]) + Send + Sync + 'static,
    ) -> Self {
        let tracked = parents.iter().any(|p| p.requires_grad());
        if tracked {
            Self::new_node(data, shape, true, parents, Some(Box::new(backward_fn)))
        } else {
            Self::new_node(data, shape, false, vec![], None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.inner.data[0]
    }

    /// Snapshot of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.read().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.write().expect("grad lock poisoned") = None;
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Adds `delta` into this tensor's gradient buffer (allocating zeros on
    /// first touch). No-op for untracked tensors.
    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        if !self.inner.requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.len());
        let mut guard = self.inner.grad.write().expect("grad lock poisoned");
        match guard.as_mut() {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b += *d;
                }
            }
            None => *guard = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode gradient accumulation from a scalar loss.
    ///
    /// Every tracked tensor reachable from `self` receives d(self)/d(tensor)
    /// in its gradient buffer; untracked tensors are untouched. Nodes are
    /// visited in exact reverse order of creation, which is a reverse
    /// topological order of the graph. Running backward twice on the same
    /// root is rejected; rebuild the graph (the next forward pass) instead.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::NonScalarLoss(self.inner.shape.clone()));
        }
        if self.inner.backward_ran.swap(true, Ordering::SeqCst) {
            return Err(Error::BackwardTwice);
        }

        // Collect tracked nodes reachable from the root, deduplicated.
        let mut stack = vec![self.clone()];
        let mut seen = std::collections::HashSet::new();
        let mut nodes: Vec<Tensor<T>> = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.inner.id) {
                continue;
            }
            for p in &t.inner.parents {
                stack.push(p.clone());
            }
            nodes.push(t);
        }
        nodes.sort_by(|a, b| b.inner.id.cmp(&a.inner.id));

        self.accumulate_grad(&[T::one()]);
        for node in &nodes {
            if let Some(rule) = &node.inner.backward_fn {
                let grad = node.inner.grad.read().expect("grad lock poisoned").clone();
                if let Some(grad) = grad {
                    rule(&grad);
                }
            }
        }
        Ok(())
    }
}
