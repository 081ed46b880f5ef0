//! Dense row-major n-dimensional tensors with reverse-mode automatic
//! differentiation over a dynamically recorded computation graph.
//!
//! Every operation that produces a tensor from tracked inputs records a node
//! holding the operation tag, the input handles, and a backward closure.
//! Tensors are created with strictly increasing ids, so any node's id is
//! larger than all of its inputs' ids; replaying nodes in decreasing id order
//! therefore visits every node after all of its consumers. During backward,
//! interior gradients live in a transient store and only leaf tensors
//! accumulate into their persistent `grad` buffer, which is what makes
//! repeated backward calls add up exactly (caller zeroes between steps).
//!
//! A graph and its tensors are confined to the thread that built them
//! (handles are `Rc`-based and not `Send`); independent graphs on different
//! threads never interact.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

mod linalg;
mod ops;
mod shape;

pub use ops::broadcast_shapes;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// True when operations on this thread record backward nodes.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` with gradient recording switched off on this thread. Forward
/// values are unchanged; only node recording is skipped.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|c| c.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|c| {
        let p = c.get();
        c.set(false);
        p
    });
    let _restore = Restore(prev);
    f()
}

type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradStore<T>)>;

struct Node<T: Scalar> {
    op: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

pub struct Tensor<T: Scalar> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("op", &self.op())
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn new_inner(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        node: Option<Node<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node,
            }),
        }
    }

    /// Leaf tensor without gradient tracking (inputs, constants).
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(CoreError::ElementCount {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self::new_inner(shape, data, false, None))
    }

    /// Leaf tensor that accumulates gradients (trainable parameter).
    pub fn param(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(CoreError::ElementCount {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self::new_inner(shape, data, true, None))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new_inner(shape, vec![T::zero(); n], false, None)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new_inner(shape, vec![value; n], false, None)
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Self::new_inner(Vec::new(), vec![value], false, None)
    }

    /// Uniform samples in `[lo, hi)`. Draws f64 from the rng so that f32 and
    /// f64 tensors consume the stream identically.
    pub fn rand_uniform(
        shape: impl Into<Vec<usize>>,
        lo: f64,
        hi: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of_f64(rng.random_range(lo..hi)))
            .collect();
        Self::new_inner(shape, data, false, None)
    }

    /// Result of an operation; records a backward node when tracking is on.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        Self::new_inner(
            shape,
            data,
            false,
            Some(Node {
                op,
                inputs,
                backward,
            }),
        )
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    /// Operation tag of the node that produced this tensor, if any.
    pub fn op(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.op)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    /// True when this tensor participates in gradient computation, either as
    /// a parameter or as the output of a recorded operation.
    pub fn tracks_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the raw buffer; used by optimizers and loaders.
    /// Callers must not hold this across a forward or backward pass.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(CoreError::NonScalarLoss {
                shape: self.shape().to_vec(),
            });
        }
        Ok(self.inner.data.borrow()[0])
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Adds `g` into the persistent gradient buffer of a leaf tensor.
    pub fn accumulate_grad(&self, g: &[T]) {
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// New untracked leaf with a copy of this tensor's data.
    pub fn detach(&self) -> Tensor<T> {
        Self::new_inner(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// reachable leaf with `requires_grad`; gradients accumulate across
    /// calls until `zero_grad`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(CoreError::NonScalarLoss {
                shape: self.shape().to_vec(),
            });
        }
        if self.inner.node.is_none() {
            if self.inner.requires_grad {
                self.accumulate_grad(&[T::one()]);
            }
            return Ok(());
        }

        // Collect every node-bearing tensor reachable from the loss.
        let mut nodes: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(t) = stack.pop() {
            if let Some(node) = &t.inner.node {
                for input in &node.inputs {
                    if input.inner.node.is_some() && seen.insert(input.id()) {
                        stack.push(input.clone());
                    }
                }
                nodes.push(t);
            }
        }
        // Ids increase with construction order, so descending id order is a
        // valid reverse topological order.
        nodes.sort_unstable_by(|a, b| b.id().cmp(&a.id()));

        let mut store = GradStore::new();
        store.interior.insert(self.id(), vec![T::one()]);
        for t in &nodes {
            let Some(grad_out) = store.interior.remove(&t.id()) else {
                continue;
            };
            let node = t.inner.node.as_ref().expect("collected node-bearing");
            (node.backward)(&grad_out, &mut store);
        }
        Ok(())
    }
}

/// Routes gradient contributions during a backward sweep: interior tensors
/// accumulate into a transient per-sweep map, leaves into their persistent
/// `grad` buffer.
pub struct GradStore<T: Scalar> {
    interior: HashMap<u64, Vec<T>>,
}

impl<T: Scalar> GradStore<T> {
    fn new() -> Self {
        GradStore {
            interior: HashMap::new(),
        }
    }

    pub fn accumulate(&mut self, target: &Tensor<T>, g: &[T]) {
        debug_assert_eq!(g.len(), target.numel());
        if target.inner.node.is_some() {
            let entry = self
                .interior
                .entry(target.id())
                .or_insert_with(|| vec![T::zero(); target.numel()]);
            for (a, &b) in entry.iter_mut().zip(g) {
                *a = *a + b;
            }
        } else if target.inner.requires_grad {
            target.accumulate_grad(g);
        }
    }
}

/// Builds a differentiable tensor from arbitrary forward data and a backward
/// closure. The closure receives the output gradient and accumulates input
/// contributions through the store. No node is recorded when tracking is off
/// or no input tracks gradients.
pub fn custom_op<T: Scalar>(
    op: &'static str,
    shape: Vec<usize>,
    data: Vec<T>,
    inputs: &[&Tensor<T>],
    backward: impl Fn(&[T], &mut GradStore<T>) + 'static,
) -> Tensor<T> {
    let track = grad_enabled() && inputs.iter().any(|t| t.tracks_grad());
    if track {
        let handles = inputs.iter().map(|t| (*t).clone()).collect();
        Tensor::from_op(op, shape, data, handles, Box::new(backward))
    } else {
        Tensor::new_inner(shape, data, false, None)
    }
}

/// Index value marking a zero-filled output element in [`gather_op`] maps.
pub const GATHER_PAD: usize = usize::MAX;

/// Gather: `out[i] = input[map[i]]`, with [`GATHER_PAD`] entries reading 0.
/// Backward scatter-adds the output gradient through the same map. This one
/// primitive backs im2col, patch extraction, and max-pooling.
pub fn gather_op<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    out_shape: Vec<usize>,
    map: Rc<Vec<usize>>,
) -> Tensor<T> {
    debug_assert_eq!(out_shape.iter().product::<usize>(), map.len());
    let data = {
        let src = input.data();
        map.iter()
            .map(|&idx| if idx == GATHER_PAD { T::zero() } else { src[idx] })
            .collect()
    };
    let input_handle = input.clone();
    let input_len = input.numel();
    let back_map = Rc::clone(&map);
    custom_op(op, out_shape, data, &[input], move |grad_out, store| {
        let mut d_input = vec![T::zero(); input_len];
        for (&idx, &g) in back_map.iter().zip(grad_out) {
            if idx != GATHER_PAD {
                d_input[idx] = d_input[idx] + g;
            }
        }
        store.accumulate(&input_handle, &d_input);
    })
}

/// Elementwise unary op built from a value map and its derivative
/// `df(x, y) = dy/dx` evaluated from input and output values.
pub fn unary_op<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Tensor<T> {
    let x = input.to_vec();
    let y: Vec<T> = x.iter().map(|&v| f(v)).collect();
    let input_handle = input.clone();
    let saved_x = x;
    let saved_y = y.clone();
    custom_op(
        op,
        input.shape().to_vec(),
        y,
        &[input],
        move |grad_out, store| {
            let d: Vec<T> = grad_out
                .iter()
                .zip(saved_x.iter().zip(&saved_y))
                .map(|(&g, (&xi, &yi))| g * df(xi, yi))
                .collect();
            store.accumulate(&input_handle, &d);
        },
    )
}

#[cfg(test)]
mod tests;
